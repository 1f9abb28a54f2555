pub struct Record {
    pub sku: String,
    pub count: u32,
}

pub fn parse_record(line: &str) -> Record {
    let mut parts = line.split(',');
    let sku = parts.next().unwrap().to_string();
    let count = parts.next().unwrap().trim().parse().unwrap();
    Record { sku, count }
}

pub fn total(records: &[Record]) -> u32 {
    records.iter().map(|r| r.count).sum()
}
