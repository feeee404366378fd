# Backprop Baseline Module
