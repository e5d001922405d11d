"""Build the attack's prompt space from a harvested collocation list.

Loads the bundled 108-collocation fixture, crosses it with the six default
visual-pattern descriptors, and prints the resulting sweep size — the same
grid a real audit would send to an endpoint.
"""

from pathlib import Path

from templeak.prompt_forge import (
    default_descriptors,
    expand_grid,
    load_collocations,
    seed_schedule,
)

FIXTURE = Path(__file__).parent.parent / "src" / "templeak" / "fixtures" / "collocations_108.txt"


def main():
    collocations = load_collocations(FIXTURE)
    print(f"loaded {len(collocations)} collocations, e.g.:")
    for col in collocations[:5]:
        seg = f" [{col.segmentation_class}]" if col.segmentation_class else ""
        print(f"  {col.text}  ({col.category_tag}, {col.source_site}){seg}")

    descriptors = default_descriptors()
    print(f"\ndescriptors: {[d.text for d in descriptors]}")

    grid = expand_grid(descriptors, collocations)
    seeds = seed_schedule(0, 50)
    print(f"\nprompt grid: {len(descriptors)} x {len(collocations)} = {len(grid)} prompts")
    print(f"seed schedule: {seeds[0]}..{seeds[-1]} ({len(seeds)} seeds)")
    print(f"full sweep: {len(grid) * len(seeds):,} generations")
    print("\nsample prompts:")
    for spec in grid[:3] + grid[-3:]:
        print(f"  {spec.rendered!r}")


if __name__ == "__main__":
    main()
