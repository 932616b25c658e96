"""Privacy-preserving network sensing: pcap -> Crypto-PAn -> traffic matrices -> statistics."""

from .anonymize import AnonBatch, Anonymizer, AnonKey
from .matrix import TrafficMatrix, WindowConfig, accumulate, sum_matrices
from .pcap import CaptureHeader, IngestReport, IpPair, PacketRecord, extract_ip_pair, ingest_files, next_packet, open_capture
from .stats import NetStats, compute_stats, oracle_stats
from .store import StoreLayout, read_group, read_matrix, write_group, write_matrix
from .synth import SynthConfig, generate_pairs, write_pcap

__version__ = "0.1.0"

__all__ = [
    "AnonBatch",
    "AnonKey",
    "Anonymizer",
    "CaptureHeader",
    "IngestReport",
    "IpPair",
    "NetStats",
    "PacketRecord",
    "StoreLayout",
    "SynthConfig",
    "TrafficMatrix",
    "WindowConfig",
    "accumulate",
    "compute_stats",
    "extract_ip_pair",
    "generate_pairs",
    "ingest_files",
    "next_packet",
    "open_capture",
    "oracle_stats",
    "read_group",
    "read_matrix",
    "sum_matrices",
    "write_group",
    "write_matrix",
    "write_pcap",
]
