# Losses Module
