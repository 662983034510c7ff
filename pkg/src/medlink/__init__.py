"""medlink: biomedical entity-linking toolkit.

Knowledge-base synonym disambiguation, adaptive concept representation,
trie-guided constrained decoding with pluggable scorers, synthetic-data
prompt pipelines, judge-protocol statistics, and a stratified bootstrap
evaluation harness.
"""

__version__ = "0.1.0"
