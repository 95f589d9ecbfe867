"""Regenerate src/scg/tls/iana_suites.csv from a list of ``NAME code`` pairs.

Usage: python tools/build_suite_table.py names.txt > src/scg/tls/iana_suites.csv

Each input line holds an IANA cipher suite name and its two-byte code in hex.
Suite properties are decomposed from the registry name.
"""
import csv
import re
import sys

# cipher token -> (key bits, block bits); block 0 = stream cipher / none
CIPHERS = {
    "NULL": (0, 0),
    "AES_128": (128, 128), "AES_256": (256, 128),
    "CAMELLIA_128": (128, 128), "CAMELLIA_256": (256, 128),
    "ARIA_128": (128, 128), "ARIA_256": (256, 128),
    "SEED": (128, 128), "IDEA": (128, 64),
    "3DES_EDE": (112, 64),
    "DES": (56, 64), "DES40": (40, 64),
    "RC2": (40, 64),
    "RC4_128": (128, 0), "RC4_40": (40, 0),
    "CHACHA20": (256, 0),
}
MODES = ("CBC_40", "CBC", "GCM", "CCM_8", "CCM", "POLY1305")
MACS = ("SHA384", "SHA256", "SHA", "MD5", "NULL")


def split_kex(kex):
    export = kex.endswith("_EXPORT")
    kex = kex.removesuffix("_EXPORT")
    if kex == "NULL":
        return "NULL", "NULL", export
    if kex.startswith("SRP"):
        return "SRP", {"SRP": "SRP", "SRP_RSA": "RSA", "SRP_DSS": "DSS"}[kex.replace("_SHA", "")], export
    if kex in ("RSA", "PSK", "KRB5"):
        return kex, kex, export
    family, _, auth = kex.partition("_")
    return family, auth, export


def decompose(name):
    if "_WITH_" not in name:  # TLS 1.3 style: TLS_<cipher>_<mode>_<mac>
        kex, auth, export = "ANY", "ANY", False
        rest = name[len("TLS_"):]
    else:
        kex_part, rest = name[len("TLS_"):].split("_WITH_")
        kex, auth, export = split_kex(kex_part)
    # AEAD suites such as *_CCM carry no MAC token
    mac = next((m for m in MACS if rest.endswith("_" + m) or rest == m), "")
    if mac and rest != "NULL":
        rest = rest[: -len(mac)].rstrip("_")
    if rest == "NULL":
        cipher, mode = "NULL", ""
    else:
        mode = next((m for m in MODES if rest.endswith("_" + m)), "")
        cipher = rest[: -len(mode) - 1] if mode else rest
        if cipher == "CHACHA20_POLY1305":
            cipher, mode = "CHACHA20", "POLY1305"
        if mode == "CBC_40":
            mode = "CBC"
            cipher = {"DES": "DES40", "RC2": "RC2"}.get(cipher, cipher)
    key_bits, block_bits = CIPHERS[cipher]
    return dict(kex=kex, auth=auth, export=int(export), cipher=cipher,
                key_bits=key_bits, block_bits=block_bits, mode=mode, mac=mac)


def main(path):
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["name", "code", "kex", "auth", "export", "cipher",
                  "key_bits", "block_bits", "mode", "mac"])
    for line in open(path):
        if not line.strip():
            continue
        name, code = line.split()
        if name.endswith("_SCSV"):
            continue
        d = decompose(name)
        out.writerow([name, code, d["kex"], d["auth"], d["export"], d["cipher"],
                      d["key_bits"], d["block_bits"], d["mode"], d["mac"]])


if __name__ == "__main__":
    main(sys.argv[1])
