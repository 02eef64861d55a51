# Command-line application package
