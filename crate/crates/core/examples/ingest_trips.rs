//! Bins raw trip records into hourly origin-destination graphs.

use mgfn::ingest::{aggregate_flow, build_multigraph, parse_trips, RegionSet, Window, HOUR, WEEK};

const TRIPS: &str = "\
origin,destination,timestamp
0,1,2024-01-01T07:15:00Z
0,1,2024-01-01T07:40:00Z
2,1,2024-01-01T07:55:00Z
1,0,2024-01-01T17:05:00Z
1,2,2024-01-01T17:30:00Z
1,0,1704129000
2,2,2024-01-02T09:00:00Z
";

pub fn run_example() -> mgfn::Result<()> {
    let regions = RegionSet::new(3)?;
    let trips = parse_trips(TRIPS.as_bytes(), &regions)?;
    let day = Window::new(1_704_067_200, 1_704_067_200 + 24 * HOUR);
    let binned = build_multigraph(&trips, &regions, HOUR, day, WEEK)?;
    println!("{} bins, dropped outside the window: {}", binned.multigraph.len(), binned.dropped);

    for g in binned.multigraph.graphs().iter().filter(|g| g.weights.sum() > 0.0) {
        println!("hour {:>2}: {} trips, OD {:?}", g.time_index, g.weights.sum(), g.weights.as_slice().unwrap());
    }
    println!("daily OD totals {:?}", aggregate_flow(&binned.multigraph).weights.as_slice().unwrap());
    Ok(())
}

#[allow(dead_code)]
fn main() -> mgfn::Result<()> {
    run_example()
}
