# Utilities package: errors, logging, checkpoints
