// Instruction-grammar autocomplete. The model only understands the scene
// generator's fixed templates, so suggestions are the full enumeration of
// valid instructions filtered by prefix.

export const SHAPES = ["circle", "square", "triangle"] as const;
export const COLORS = ["red", "green", "blue", "yellow", "gray"] as const;
export const SIZES = ["small", "large"] as const;
export const ROW_WORDS = ["top", "middle", "bottom"] as const;
export const COL_WORDS = ["left", "center", "right"] as const;

export function positionPhrases(): string[] {
  const phrases: string[] = [];
  for (const row of ROW_WORDS) {
    for (const col of COL_WORDS) {
      phrases.push(`${row} ${col}`);
    }
  }
  return phrases;
}

export function allInstructions(): string[] {
  const out: string[] = [];
  const positions = positionPhrases();
  for (const pos of positions) {
    for (const size of SIZES) {
      for (const color of COLORS) {
        for (const shape of SHAPES) {
          out.push(`add a ${size} ${color} ${shape} to the ${pos}`);
        }
      }
    }
  }
  for (const pos of positions) {
    out.push(`remove the object at the ${pos}`);
  }
  for (const pos of positions) {
    for (const size of SIZES) {
      for (const color of COLORS) {
        for (const shape of SHAPES) {
          out.push(`make the object at the ${pos} a ${size} ${color} ${shape}`);
        }
      }
    }
  }
  return out;
}

const CORPUS = allInstructions();

export function suggest(prefix: string, limit = 8): string[] {
  const needle = prefix.toLowerCase().trimStart();
  if (needle === "") return [];
  const hits: string[] = [];
  for (const line of CORPUS) {
    if (line.startsWith(needle)) {
      hits.push(line);
      if (hits.length >= limit) break;
    }
  }
  return hits;
}
