"""Counterfactually fair structured representations for tabular data.

A two-branch variational autoencoder encodes sensitive attributes and the
remaining covariates separately; the covariate code is pushed through a
linear structural equation model over domain concepts before decoding.
Downstream predictors trained on the structured code are then audited with a
situation test that inverts sensitive attributes.
"""

__version__ = "0.1.0"
