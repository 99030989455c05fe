"""Day-ahead electrical load forecasting with a hybrid LSTM + FCNN model."""

__version__ = "0.1.0"
