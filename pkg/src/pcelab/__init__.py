"""Equilibrium engine for markets with staggered insider signal release.

Primary entry points:

* pcelab.market      scenario description and validation
* pcelab.engine      backward-induction equilibrium construction
* pcelab.simulate    exact-transition path simulation
* pcelab.limits      many-insider limit studies
* pcelab.cli         command line front end
"""

__version__ = "0.1.0"
