import dpkt
import numpy as np
import pytest

from netsense.pcap import IngestReport, IpPair, iter_pairs, iter_packets, open_capture
from netsense.synth import (
    SplitMix64,
    SynthConfig,
    address_pools,
    generate_pairs,
    splitmix64,
    write_pcap,
)


class TestSplitMix64:
    def test_published_reference_seed_zero(self):
        # published reference sequence of splitmix64.c for seed 0
        assert splitmix64(0, 3).tolist() == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_documented_seed_42(self):
        assert splitmix64(42, 3).tolist() == [0xBDD732262FEB6E95, 0x28EFE333B266F103, 0x47526757130F9F52]

    @pytest.mark.parametrize("seed", [0, 42, 2**64 - 1, 0xDEADBEEF])
    def test_vector_matches_scalar(self, seed):
        g = SplitMix64(seed)
        assert splitmix64(seed, 200).tolist() == [g.next() for _ in range(200)]

    def test_offset_windows(self):
        full = splitmix64(7, 50)
        assert np.array_equal(splitmix64(7, 20, start=30), full[30:])


class TestGeneratePairs:
    def test_zero_packets(self):
        assert generate_pairs(SynthConfig(n_packets=0)) == []

    def test_degenerate_pools(self):
        pairs = generate_pairs(SynthConfig(n_packets=500, n_sources=1, n_destinations=1, source_exponent=0,
                                           destination_exponent=0))
        assert len(set(pairs)) == 1

    def test_exact_count_and_determinism(self):
        c = SynthConfig(seed=3, n_packets=1234)
        a, b = generate_pairs(c), generate_pairs(c)
        assert len(a) == 1234 and a == b

    def test_seed_changes_output(self):
        assert generate_pairs(SynthConfig(seed=1, n_packets=100)) != generate_pairs(SynthConfig(seed=2, n_packets=100))

    def test_pools_disjoint(self):
        src, dst = address_pools(SynthConfig(n_sources=5000, n_destinations=7000))
        assert len(src) == 5000 and len(dst) == 7000
        assert len(set(src.tolist()) | set(dst.tolist())) == 12000

    def test_pairs_come_from_pools(self):
        c = SynthConfig(n_packets=3000, n_sources=50, n_destinations=60)
        src, dst = address_pools(c)
        pairs = generate_pairs(c)
        assert {p.src for p in pairs} <= set(src.tolist())
        assert {p.dst for p in pairs} <= set(dst.tolist())

    def test_zipf_top_frequency(self):
        n, s, packets = 1000, 1.2, 100_000
        c = SynthConfig(seed=42, n_packets=packets, n_sources=n, source_exponent=s)
        src_pool, _ = address_pools(c)
        pairs = generate_pairs(c)
        top = sum(1 for p in pairs if p.src == int(src_pool[0])) / packets
        predicted = 1.0 / sum(k ** -s for k in range(1, n + 1))
        assert predicted / 2 <= top <= predicted * 2

    def test_uniform_exponent(self):
        c = SynthConfig(seed=5, n_packets=50_000, n_sources=10, source_exponent=0.0)
        src_pool, _ = address_pools(c)
        counts = np.bincount(np.searchsorted(np.sort(src_pool), [p.src for p in generate_pairs(c)]), minlength=10)
        assert counts.min() > 4500 and counts.max() < 5500

    @pytest.mark.parametrize("bad", [
        dict(n_sources=0), dict(n_destinations=0), dict(source_exponent=-1.0),
        dict(link_type="ppp"), dict(noise_fraction=1.0), dict(n_packets=-1),
    ])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


class TestWritePcap:
    @pytest.mark.parametrize("link", ["ethernet", "raw_ip"])
    def test_round_trip(self, tmp_path, link):
        c = SynthConfig(seed=11, n_packets=4000, link_type=link)
        pairs = generate_pairs(c)
        path = write_pcap(pairs, c, tmp_path / "x.pcap")
        assert list(iter_pairs([path])) == pairs

    def test_timestamps(self, tmp_path):
        c = SynthConfig(n_packets=3, timestamp_start=1000, inter_packet_micros=500_000)
        path = write_pcap(generate_pairs(c), c, tmp_path / "t.pcap")
        with open(path, "rb") as fh:
            h = open_capture(fh)
            stamps = [(r.ts_seconds, r.ts_fraction) for r in iter_packets(fh, h)]
        assert (h.endianness, h.timestamp_resolution) == ("little", "microsecond")
        assert stamps == [(1000, 0), (1000, 500_000), (1001, 0)]

    def test_ethernet_frame_layout(self, tmp_path):
        c = SynthConfig(n_packets=1)
        (pair,) = generate_pairs(c)
        path = write_pcap([pair], c, tmp_path / "one.pcap")
        frame = path.read_bytes()[24 + 16:]
        assert len(frame) == 34
        assert frame[12:14] == b"\x08\x00"
        assert frame[14] == 0x45
        assert frame[24:26] == b"\x00\x00"  # checksum left zero
        assert int.from_bytes(frame[26:30], "big") == pair.src

    @pytest.mark.parametrize("link", ["ethernet", "raw_ip"])
    def test_noise_is_skipped(self, tmp_path, link):
        c = SynthConfig(seed=4, n_packets=2000, link_type=link, noise_fraction=0.25)
        pairs = generate_pairs(c)
        path = write_pcap(pairs, c, tmp_path / "n.pcap")
        report = IngestReport()
        assert list(iter_pairs([path], report)) == pairs
        assert 300 < report.skipped_non_ipv4 < 700
        assert report.packets_read == 2000 + report.skipped_non_ipv4

    def test_byte_identical(self, tmp_path):
        c = SynthConfig(seed=42, n_packets=2000)
        a = write_pcap(generate_pairs(c), c, tmp_path / "a.pcap").read_bytes()
        b = write_pcap(generate_pairs(c), c, tmp_path / "b.pcap").read_bytes()
        assert a == b

    @pytest.mark.parametrize("link", ["ethernet", "raw_ip"])
    def test_dpkt_parses_output(self, tmp_path, link):
        c = SynthConfig(seed=8, n_packets=500, link_type=link, noise_fraction=0.1)
        pairs = generate_pairs(c)
        path = write_pcap(pairs, c, tmp_path / "d.pcap")
        seen = []
        with open(path, "rb") as fh:
            reader = dpkt.pcap.Reader(fh)
            assert reader.datalink() == (dpkt.pcap.DLT_EN10MB if link == "ethernet" else 101)
            for _ts, buf in reader:
                if link == "ethernet":
                    eth = dpkt.ethernet.Ethernet(buf)
                    if eth.type != dpkt.ethernet.ETH_TYPE_IP:
                        assert eth.type == dpkt.ethernet.ETH_TYPE_ARP
                        continue
                    ip = eth.data
                else:
                    if buf[0] >> 4 != 4:
                        continue
                    ip = dpkt.ip.IP(buf)
                assert ip.v == 4 and ip.hl == 5 and ip.len == 20
                seen.append(IpPair(int.from_bytes(ip.src, "big"), int.from_bytes(ip.dst, "big")))
        assert seen == pairs
