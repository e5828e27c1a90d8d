use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::{hash_feature, DataError, Dataset, DatasetSchema, Instance};

/// Optional column written by the generator; the trainer only uses it for
/// clustering diagnostics.
pub const PLANTED_COLUMN: &str = "planted_cluster";

pub fn parse_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let file = File::open(path.as_ref())?;
    read_dataset(BufReader::new(file), schema)
}

/// Reads `label,domain_id,session_id,<fields...>[,planted_cluster]` CSV.
/// Columns are matched by header name; feature values are hashed into each
/// field's vocabulary.
pub fn read_dataset<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Header(format!("missing column `{name}`")))
    };
    let label_col = find(&schema.label_column)?;
    let domain_col = find(&schema.domain_column)?;
    let session_col = find(&schema.session_column)?;
    let field_cols = schema
        .fields
        .iter()
        .map(|f| find(&f.name))
        .collect::<Result<Vec<_>, _>>()?;
    let planted_col = headers.iter().position(|h| h == PLANTED_COLUMN);
    let known = 3 + field_cols.len() + planted_col.is_some() as usize;
    if headers.len() != known {
        let extra: Vec<&str> = headers
            .iter()
            .filter(|h| {
                *h != schema.label_column
                    && *h != schema.domain_column
                    && *h != schema.session_column
                    && *h != PLANTED_COLUMN
                    && !schema.fields.iter().any(|f| f.name == *h)
            })
            .collect();
        return Err(DataError::Header(format!("unexpected columns {extra:?}")));
    }

    let mut instances = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| DataError::Row { line, message };
        let label = match &record[label_col] {
            "0" => 0,
            "1" => 1,
            other => return Err(row_err(format!("label `{other}` is not 0 or 1"))),
        };
        let domain_id = record[domain_col]
            .trim()
            .parse::<usize>()
            .map_err(|e| row_err(format!("domain_id `{}`: {e}", &record[domain_col])))?;
        let feature_ids = schema
            .fields
            .iter()
            .zip(&field_cols)
            .map(|(f, &c)| hash_feature(&record[c], f.vocab_size))
            .collect();
        let planted_cluster = match planted_col {
            Some(c) if !record[c].is_empty() => Some(
                record[c]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| row_err(format!("{PLANTED_COLUMN} `{}`: {e}", &record[c])))?,
            ),
            _ => None,
        };
        instances.push(Instance {
            label,
            domain_id,
            session_id: record[session_col].to_string(),
            feature_ids,
            planted_cluster,
        });
    }
    Ok(Dataset {
        schema: schema.clone(),
        instances,
    })
}

/// Writes the dataset with feature ids as their decimal text. The planted
/// column is written when every instance carries one.
pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> Result<(), DataError> {
    let schema = &dataset.schema;
    let planted = dataset.has_planted_clusters();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.label_column.clone(),
        schema.domain_column.clone(),
        schema.session_column.clone(),
    ];
    header.extend(schema.field_names());
    if planted {
        header.push(PLANTED_COLUMN.to_string());
    }
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for inst in &dataset.instances {
        row.clear();
        row.push(inst.label.to_string());
        row.push(inst.domain_id.to_string());
        row.push(inst.session_id.clone());
        row.extend(inst.feature_ids.iter().map(u32::to_string));
        if planted {
            row.push(inst.planted_cluster.unwrap_or_default().to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
