"""Dataflow-aware hybrid scheduling for heterogeneous vehicle computers.

DNN tasks are placed on the platform with the lowest predicted latency;
other tasks share the CPU through virtual-runtime fair scheduling across
dataflow subgraphs, with upstream nodes first inside each subgraph.
"""

__version__ = "0.1.0"
