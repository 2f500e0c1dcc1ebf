# Test package for flowmarket
