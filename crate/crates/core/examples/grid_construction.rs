//! Nested spatial grid for an oscillating front: sorted front samples, the
//! uniform refinement between them, and the node index of each front.
//!
//! ```text
//! cargo run --example grid_construction
//! ```

use stefan::grid::{SpatialGrid, TimeGrid};

fn main() -> stefan::Result<()> {
    let time = TimeGrid::new(1.0, 8)?;
    let s: Vec<f64> = time
        .nodes()
        .iter()
        .map(|&t| 1.0 + 0.4 * (6.0 * t).sin())
        .collect();
    let grid = SpatialGrid::build(&s, 2.0, time.tau(), 1.0)?;

    println!(
        "base step {:.4}, tail step {:?}",
        grid.base_step(),
        grid.tail_step()
    );
    println!("sorted sample order {:?}", grid.permutation());
    println!("{:>3} {:>8} {:>5} {:>10}", "k", "s_k", "m_k", "x_m");
    for (k, sk) in s.iter().enumerate() {
        let m = grid.boundary_index(k);
        println!("{k:>3} {sk:>8.4} {m:>5} {:>10.4}", grid.node(m));
    }
    println!(
        "widths: {:?}",
        grid.widths()
            .iter()
            .map(|h| (h * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    Ok(())
}
