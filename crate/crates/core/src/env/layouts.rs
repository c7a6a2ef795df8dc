//! Canonical gridworld layouts.
//!
//! The size-20 layouts ship as text files under `layouts/` and are embedded
//! at build time. Other sizes are produced by [`generate`], which places the
//! same walls proportionally: the horizontal wall sits at row `n/2` with its
//! only gap in column 0, the two vertical walls sit at columns `3n/10` and
//! `13n/20` with their only gap in the bottom row. Start is `(0, 0)`.
//!
//! | id    | walls            | goal        |
//! |-------|------------------|-------------|
//! | grid1 | none             | bottom-right |
//! | grid2 | horizontal       | bottom-right |
//! | grid3 | vertical         | top-right   |
//! | grid6 | horizontal + vertical | bottom-right |
//! | grid7 | as grid3         | bottom-right |
//! | grid8 | as grid6         | bottom-left |

use std::collections::BTreeSet;

use super::grid::{Cell, GridSpec};
use super::EnvError;

pub const BUILTIN_IDS: [&str; 6] = ["grid1", "grid2", "grid3", "grid6", "grid7", "grid8"];
pub const BUILTIN_SIZE: usize = 20;

fn embedded(id: &str) -> Option<&'static str> {
    Some(match id {
        "grid1" => include_str!("../../layouts/grid1.txt"),
        "grid2" => include_str!("../../layouts/grid2.txt"),
        "grid3" => include_str!("../../layouts/grid3.txt"),
        "grid6" => include_str!("../../layouts/grid6.txt"),
        "grid7" => include_str!("../../layouts/grid7.txt"),
        "grid8" => include_str!("../../layouts/grid8.txt"),
        _ => return None,
    })
}

pub fn canonical(id: &str, size: usize) -> Result<GridSpec, EnvError> {
    if size == BUILTIN_SIZE {
        let text = embedded(id).ok_or_else(|| EnvError::UnknownLayout(id.to_string()))?;
        return GridSpec::parse(id, text);
    }
    generate(id, size)
}

fn horizontal_wall(n: usize) -> impl Iterator<Item = Cell> {
    (1..n).map(move |c| (n / 2, c))
}

fn vertical_walls(n: usize) -> impl Iterator<Item = Cell> {
    let (v1, v2) = (3 * n / 10, 13 * n / 20);
    (0..n - 1).flat_map(move |r| [(r, v1), (r, v2)])
}

/// Proportional layout for any side length `>= 6`.
pub fn generate(id: &str, n: usize) -> Result<GridSpec, EnvError> {
    if n < 6 {
        return Err(EnvError::InvalidLayout(format!(
            "canonical layouts need size >= 6, got {n}"
        )));
    }
    let last = n - 1;
    let (walls, goal): (BTreeSet<Cell>, Cell) = match id {
        "grid1" => (BTreeSet::new(), (last, last)),
        "grid2" => (horizontal_wall(n).collect(), (last, last)),
        "grid3" => (vertical_walls(n).collect(), (0, last)),
        "grid7" => (vertical_walls(n).collect(), (last, last)),
        "grid6" => (horizontal_wall(n).chain(vertical_walls(n)).collect(), (last, last)),
        "grid8" => (horizontal_wall(n).chain(vertical_walls(n)).collect(), (last, 0)),
        other => return Err(EnvError::UnknownLayout(other.to_string())),
    };
    GridSpec::new(id, n, walls, (0, 0), goal)
}
