# Configuration package: run settings and flat config files
