"""
Text conditioning package: vocabulary, tokenizer and the frozen toy text encoder.
"""
