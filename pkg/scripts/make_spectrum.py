"""Regenerate the bundled 120 kVp tungsten spectrum.

Kramers thick-target continuum plus the tungsten K lines, hardened by an
aluminium filter. The result is representative of a clinical 120 kVp beam;
it is not a reproduction of any vendor tool.

    python scripts/make_spectrum.py > src/marforge/data/spectrum_120kvp.csv
"""
import argparse

import numpy as np

# NIST aluminium, total with coherent (keV, cm2/g); density 2.699 g/cm3
AL_ENERGY = np.array([1.0, 1.5, 1.5595, 1.5596, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0,
                      15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 150.0])
AL_MASS = np.array([1185, 402.2, 362.1, 3957, 2263, 788.0, 360.5, 193.4, 115.3, 50.33,
                    26.23, 7.955, 3.441, 1.128, 0.5685, 0.3681, 0.2778, 0.2018,
                    0.1704, 0.1378])
AL_DENSITY = 2.699

# tungsten K lines (keV, intensity relative to K-alpha1)
K_LINES = [(57.98, 0.58), (59.32, 1.0), (67.24, 0.33), (69.10, 0.12)]
K_EDGE = 69.525


def spectrum(kvp=120.0, al_mm=3.5, char_fraction=0.08):
    energy = np.arange(1.0, kvp + 1.0)
    fluence = np.clip(kvp - energy, 0.0, None) / energy
    if kvp > K_EDGE:
        lines = np.zeros_like(fluence)
        for e_line, rel in K_LINES:
            lines[int(round(e_line)) - 1] += rel
        lines *= char_fraction * fluence[energy >= 20].sum() / lines.sum()
        fluence = fluence + lines
    mass = np.exp(np.interp(np.log(energy), np.log(AL_ENERGY), np.log(AL_MASS)))
    fluence = fluence * np.exp(-mass * AL_DENSITY * al_mm / 10.0)
    return energy, fluence / fluence.sum()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--kvp", type=float, default=120.0)
    parser.add_argument("--al-mm", type=float, default=3.5)
    args = parser.parse_args()
    energy, weight = spectrum(args.kvp, args.al_mm)
    print("energy_kev,weight")
    for e, w in zip(energy, weight):
        print(f"{e:.1f},{w:.9e}")


if __name__ == "__main__":
    main()
