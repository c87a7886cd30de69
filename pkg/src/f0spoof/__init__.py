"""F0-subband spoofing countermeasure: front-end, SR-LA Res2Net model, training and ASVspoof metrics."""

__version__ = "0.1.0"
