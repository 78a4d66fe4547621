//! The small worked log used throughout the tests and examples.
//!
//! Row 7 is logged in the source material as `15/06/2014 6:75pm`, which is
//! not a valid time. [`TABLE_CSV_RAW`] keeps it verbatim; [`TABLE_CSV`]
//! substitutes 18:57 so the row can take part in deduplication.

use super::record::{read_log, InteractionRecord, LogFormat, ParseOptions};

pub const TABLE_CSV_RAW: &str = "\
user ID,App list,Date,Interaction,Advert,Publisher,Site
U7,entertainment1|finance5|finance67|lifestyle78,03/05/2014 8:00pm,Impression,Advert1,Pub6,Site2
U7,entertainment1|finance5|finance67|lifestyle78,05/05/2014 4:03pm,Impression,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,05/05/2014 4:03pm,Tap,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,05/05/2014 4:04pm,Load Video,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,05/05/2014 4:04pm,Play Video,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,05/05/2014 4:05pm,25% Video,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67,15/06/2014 6:75pm,Impression,Advert1,Pub6,Site2
U23,finance1|entertainment34|entertainment33|finance4|lifestyles3|entertainment6,21/06/2014 2:18am,Impression,Advert4,Pub4,Site1
";

pub const TABLE_CSV: &str = "\
user,apps,ts,stage,advert,publisher,site
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-03T20:00,impression,Advert1,Pub6,Site2
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-05T16:03,impression,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-05T16:03,tap,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-05T16:04,loadvideo,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-05T16:04,playvideo,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67|lifestyle78,2014-05-05T16:05,video25,Advert4,Pub2,Site1
U7,entertainment1|finance5|finance67,2014-06-15T18:57,impression,Advert1,Pub6,Site2
U23,finance1|entertainment34|entertainment33|finance4|lifestyles3|entertainment6,2014-06-21T02:18,impression,Advert4,Pub4,Site1
";

pub const TABLE_REGISTRY: &str = "Advert1\tfinance\nAdvert4\tentertainment\n";

/// The eight rows of [`TABLE_CSV`], parsed.
pub fn table_records() -> Vec<InteractionRecord> {
    let mut out = Vec::new();
    read_log(TABLE_CSV.as_bytes(), LogFormat::Csv, &ParseOptions::default(), |r| out.push(r)).expect("fixture parses");
    out
}
