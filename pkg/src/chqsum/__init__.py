"""Question-focus and question-type aware transformer summarization toolkit."""

__version__ = "0.1.0"
