//! Turning a trip log into a replicated point pattern: one replicate per
//! calendar day, check-out clock times in hours at each station.

use std::fs;

use ppkrige::data::{ingest_events, ingest_trips};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("ppkrige_event_ingestion");
    fs::create_dir_all(&dir)?;
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map(|_| p)
    };
    let sites = write("sites.csv", "site,x,y\nharbor,0.0,0.0\nmarket,1.2,0.4\nstation,0.5,1.1\n")?;
    let calendar = write("days.txt", "# weekdays only\n2016-03-01\n2016-03-02\n2016-03-04\n")?;
    let trips = write(
        "trips.csv",
        "station,start_time\n\
         harbor,2016-03-01 07:42:10\n\
         harbor,2016-03-01 17:05:00\n\
         market,2016-03-01T12:30:00\n\
         station,03/02/2016 08:15\n\
         harbor,2016-03-03 09:00:00\n\
         depot,2016-03-02 10:00:00\n\
         market,2016-03-04 18:45:30\n",
    )?;

    let pattern = ingest_trips(&trips, &sites, &calendar)?;
    println!("{} days x {} stations on [0, 24] hours", pattern.n(), pattern.d());
    for (i, day) in pattern.replicate_labels().iter().enumerate() {
        let counts: Vec<usize> = (0..pattern.d()).map(|j| pattern.events(i, j).len()).collect();
        println!("  {day}: {counts:?}");
    }

    let out = dir.join("events.csv");
    pattern.write_events(&out)?;
    let again = ingest_events(&out, pattern.sites(), pattern.domain())?;
    println!("events file round-trips: {}", again == pattern);
    print!("{}", fs::read_to_string(&out)?);
    Ok(())
}
