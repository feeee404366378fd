# DeepFacto NMF Module
