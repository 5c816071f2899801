"""Command line, configuration and HTTP surface of the easy-versus-hard framework"""
