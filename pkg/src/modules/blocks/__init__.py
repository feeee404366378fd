# Blocks Module
