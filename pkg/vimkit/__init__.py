"""vimkit - Algorithm-agnostic variable importance inference."""

__version__ = "0.4.0"
