# Lets `pytest` import the core and harness packages from the repository root
