"""
Persistence package: weight files, images, the procedural corpus and run files.
"""
