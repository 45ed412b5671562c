"""Multi-curve interest-rate simulation and counterparty valuation adjustments.

The package is organised bottom-up:

* :mod:`mchjm.termstructures` -- initial discount / forward curves and bootstraps
* :mod:`mchjm.hjm`            -- separable-volatility Markov rate models (2 factors by default)
* :mod:`mchjm.credit`         -- square-root-plus-shift default intensities
* :mod:`mchjm.engine`         -- correlated Monte Carlo path generation
* :mod:`mchjm.products`       -- swap trades and pathwise exposure evaluation
* :mod:`mchjm.xva`            -- collateral-inclusive valuation adjustments
* :mod:`mchjm.calibration`    -- swaption pricing and least-squares calibration
* :mod:`mchjm.cli`            -- config-driven command line front end
"""

__version__ = "0.1.0"
