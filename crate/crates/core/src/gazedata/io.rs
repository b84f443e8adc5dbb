//! On-disk dataset layout: `manifest.json`, `fixations.jsonl` and one PGM
//! per image under `images/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_fixation_file, parse_pgm, write_pgm, DataError, GridSpec, OrderRule, SyntheticDataset};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    seed: u64,
    grid: GridSpec,
    rule: OrderRule,
    items: Vec<ManifestItem>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestItem {
    image_id: String,
    image: String,
    label: u8,
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io(format!("{}: {e}", path.display()))
}

pub fn save_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<(), DataError> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| io_err(&img_dir, e))?;
    let mut items = Vec::with_capacity(ds.len());
    for (img, label) in ds.images.iter().zip(&ds.labels) {
        let rel = format!("images/{}.pgm", img.id);
        let path = dir.join(&rel);
        fs::write(&path, write_pgm(img)).map_err(|e| io_err(&path, e))?;
        items.push(ManifestItem {
            image_id: img.id.clone(),
            image: rel,
            label: *label,
        });
    }
    let mut jsonl = String::new();
    for r in &ds.records {
        jsonl.push_str(&r.to_jsonl());
        jsonl.push('\n');
    }
    let fix_path = dir.join("fixations.jsonl");
    fs::write(&fix_path, jsonl).map_err(|e| io_err(&fix_path, e))?;
    let manifest = Manifest {
        seed: ds.seed,
        grid: ds.grid,
        rule: ds.rule,
        items,
    };
    let man_path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&man_path, text).map_err(|e| io_err(&man_path, e))
}

pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset, DataError> {
    let man_path = dir.join("manifest.json");
    let text = fs::read_to_string(&man_path).map_err(|e| io_err(&man_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| DataError::Json(format!("{}: {e}", man_path.display())))?;
    let fix_path = dir.join("fixations.jsonl");
    let fix_text = fs::read_to_string(&fix_path).map_err(|e| io_err(&fix_path, e))?;
    let records = parse_fixation_file(&fix_text)?;
    if records.len() != manifest.items.len() {
        return Err(DataError::InvalidArgument(format!(
            "{} manifest items but {} fixation records",
            manifest.items.len(),
            records.len()
        )));
    }
    let mut images = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (item, rec) in manifest.items.iter().zip(&records) {
        if item.image_id != rec.image_id {
            return Err(DataError::InvalidArgument(format!(
                "manifest item {} paired with fixation record {}",
                item.image_id, rec.image_id
            )));
        }
        let path = dir.join(&item.image);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        images.push(parse_pgm(&bytes, item.image_id.clone())?);
        labels.push(item.label);
    }
    Ok(SyntheticDataset {
        images,
        records,
        labels,
        seed: manifest.seed,
        grid: manifest.grid,
        rule: manifest.rule,
    })
}
