"""On-policy actor-critic driven by pathwise value gradients.

The package is organized as a set of small, independently testable layers:

- ``nets``: hand-rolled dense networks with exact reverse-mode gradients
- ``tanh_gaussian``: squashed Gaussian policy head and sampled divergences
- ``hl_gauss``: histogram projection and cross-entropy for value regression
- ``returns``: entropy-augmented TD(lambda) state-action targets
- ``critic`` / ``actor``: the two loss assemblies
- ``envs``: vectorized analytic benchmark environments
- ``trainer``: the on-policy loop tying everything together
- ``lab``: gradient estimator comparison on a fixed test function
- ``config`` / ``cli``: run configuration and the command line front end
"""

__version__ = "0.1.0"
