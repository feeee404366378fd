# Block-ADMM Training Modules
