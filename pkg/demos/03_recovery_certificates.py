"""Which buses are guaranteed to have recoverable angles?

The certificates need no network model: magnitudes, injections and the
magnitude sensitivity blocks are enough. A failed check is inconclusive.
"""

from gridphase.certify import certify_network, format_table
from gridphase.netmodel import load_case

cases = ["case14", "case24_ieee_rts", "case_ieee30", "case_RTS_GMLC", "case118"]
reports = [certify_network(load_case(c)) for c in cases]
print(format_table(reports))

print("\nSame table with the angle blocks scaled by rows, the form used for the")
print("commonly quoted sigma_max benchmark values:")
print(format_table([certify_network(load_case(c), scaling="row") for c in cases]))

print()
print(reports[2].summary())
