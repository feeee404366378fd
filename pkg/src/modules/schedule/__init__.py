# Penalty Schedule Module
