"""
Sparsification of measures over ReLU^k ridge atoms and of zonoid generating measures by
multiscale discrepancy partial colorings.
"""
