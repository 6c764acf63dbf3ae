"""Transport supervised predictions from a labeled source population to an
unlabeled target population under covariate shift."""

__version__ = "0.1.0"
