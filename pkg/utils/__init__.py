# File and report utilities package
