# Comprehensive tests package
