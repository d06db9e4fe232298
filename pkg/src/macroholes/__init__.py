"""Desk-scale laboratory for macroscopic holes in random interlacements, random
walk traces and Gaussian free field excursion sets.

Modules: :mod:`lattice` (site sets, components, holes), :mod:`walks`,
:mod:`interlacements`, :mod:`gff`, :mod:`potential` (Green functions,
capacities), :mod:`shapes` (isoperimetric functionals), :mod:`coarse`
(coarse graining and solidification), :mod:`tilt` (tilted measures and
entropies), :mod:`experiments` and :mod:`cli`.
"""
__version__ = "0.1.0"
