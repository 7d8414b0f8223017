from ._lexinet import LexinetError, describe, min_consensus, run

__all__ = ["LexinetError", "describe", "min_consensus", "run"]
