"""kscope: simulator and compiler toolchain for a bypass NN co-processor.

The co-processor runs small quantized neural networks over raw packet bytes.
Two kinds of run-to-completion process elements are modeled: the FPE (low
latency blocked GEMV with inline accumulators and an activation LUT) and the
HPE (a weight-stationary systolic array with three dual-port RAM banks,
accumulate/activate/pool units).  A traffic monitor splits flows into a fast
path (first packet of every flow) and a slow path (flows crossing a packet
count threshold), and inference results reach the forwarding plane only
through a query table.
"""

__version__ = "0.1.0"
