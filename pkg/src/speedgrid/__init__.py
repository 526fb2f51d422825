"""Speed dictionaries from clustered road links and recurrent
point-wise speed prediction over GPS trajectories."""

__version__ = "0.1.0"
