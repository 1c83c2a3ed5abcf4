# Configuration module 