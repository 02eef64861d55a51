# Estimation core package
