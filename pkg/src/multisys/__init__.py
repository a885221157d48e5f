"""Interpretable multi-system abnormality prediction from routine lab biomarkers.

The package is organised as a staged pipeline:

ingest   -- parse unit-embedded lab strings into a clean, imputed feature matrix
indices  -- threshold-based system flags, grades, burden score and the binary target
split    -- deterministic stratified holdout and k-fold partitioning
models   -- from-scratch logistic regression, random forest and gradient boosting
metrics  -- ROC/AUC, confusion metrics and cross-validation aggregation
explain  -- exact path-dependent tree-Shapley attribution and partial dependence
synth    -- deterministic synthetic cohort generator
report   -- deterministic SVG figures and descriptive tables
cli      -- end-to-end orchestration
"""

__version__ = "0.1.0"
