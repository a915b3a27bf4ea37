# scfde: transceiver design and link simulation for SC-FDE MIMO relay systems
__version__ = "0.1.0"
