const SCHEMAS: [(&str, &str); 6] = [
    ("space", include_str!("../schemas/space.schema.json")),
    ("family", include_str!("../schemas/family.schema.json")),
    ("cubes", include_str!("../schemas/cubes.schema.json")),
    ("function", include_str!("../schemas/function.schema.json")),
    ("decomposition", include_str!("../schemas/decomposition.schema.json")),
    ("report", include_str!("../schemas/report.schema.json")),
];

pub fn print(name: &str) -> Result<(), String> {
    if name == "all" {
        for (n, _) in SCHEMAS {
            println!("{n}");
        }
        return Ok(());
    }
    match SCHEMAS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => {
            print!("{text}");
            Ok(())
        }
        None => Err(format!("unknown schema {name:?}; run --schema to list them")),
    }
}
