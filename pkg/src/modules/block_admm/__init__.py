# Block-ADMM Module (batch and online)
