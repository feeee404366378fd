# Standard ADMM Module
