# Data, Config and Checkpoint Module
