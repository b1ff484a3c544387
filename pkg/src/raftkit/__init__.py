"""raftkit: access-controlled hybrid retrieval plus a RAFT training-data pipeline.

Subpackages are imported directly (raftkit.corpus, raftkit.retrieval, ...);
the top level stays import-light so CLI startup and kernel selection are cheap.
"""

__version__ = "0.1.0"
