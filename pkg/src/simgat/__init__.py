"""Cost-modified graph attention for predicting daily visits from
neighborhoods to business clusters, alongside the classical spatial
interaction models and DeepLIFT explanations."""

__version__ = "0.1.0"
