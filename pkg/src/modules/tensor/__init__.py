# Tensor Core Module
