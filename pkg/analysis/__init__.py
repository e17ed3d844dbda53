"""
Analysis package: radio layer, traffic model and effective-capacity QoS model
"""

from .phy import ChannelModel, finite_blocklength_rate, q_func, q_inv, symbols_per_frame
from .traffic import QueueProfile, effective_bandwidth
from .qos import QosModel, qos_report, solve_power, solve_qos_exponent

__all__ = ["ChannelModel", "finite_blocklength_rate", "q_func", "q_inv", "symbols_per_frame",
           "QueueProfile", "effective_bandwidth",
           "QosModel", "qos_report", "solve_power", "solve_qos_exponent"]
