#!/usr/bin/env python3
"""Shape measurements on phantom bundles with known geometry.

The straight tubes give exact expectations: curl of a straight
centerline is 1, a quarter-turn arc is longer than its chord, and the
mask volume tracks the analytic cylinder volume up to voxelization.
"""

import argparse

import numpy as np

from bundleseg import (PhantomSpec, generate_subject, generate_streamlines,
                       streamline_length, streamline_curl, bundle_shape)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--streamlines", type=int, default=25)
    ap.add_argument("--seed", type=int, default=2)
    args = ap.parse_args()

    spec = PhantomSpec()
    subject = generate_subject(spec, seed=args.seed)

    for tube in spec.tubes:
        mask = subject["masks"].channel(tube.name) > 0
        lines = generate_streamlines(spec, tube.name, args.streamlines,
                                     seed=args.seed)
        shape = bundle_shape(mask, lines, voxel_size=spec.grid.voxel_size)
        chord = np.linalg.norm(tube.control_points[-1] - tube.control_points[0])
        print(f"{tube.name}:")
        print(f"  streamlines: {len(lines)}, "
              f"mean length {shape.mean_length:.2f} mm (chord {chord:.2f} mm)")
        print(f"  curl {shape.curl:.4f} "
              f"({'straight' if shape.curl < 1.01 else 'curved'})")
        print(f"  mask volume {shape.volume:.0f} mm^3, "
              f"surface {shape.surface_area:.0f} mm^2")

    # sanity check on a hand-made curve: a semicircle of radius 10
    theta = np.linspace(0.0, np.pi, 200)
    arc = np.stack([10 * np.cos(theta), 10 * np.sin(theta),
                    np.zeros_like(theta)], axis=1)
    print("semicircle r=10: length %.3f (pi*r = %.3f), curl %.4f (pi/2 = %.4f)"
          % (streamline_length(arc), np.pi * 10,
             streamline_curl(arc), np.pi / 2))


if __name__ == "__main__":
    main()
