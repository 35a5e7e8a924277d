//! Extraction artifacts and inputs the service reads from the output
//! directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use eomwatch_core::features::IndexSeries;
use eomwatch_core::geodata::{load_events, load_parcels, EventSet, ParcelSet};
use eomwatch_core::pipeline::{find_manifests, load_extracted, RunConfig, WindowRecord};
use eomwatch_core::raster::{harmonize, load_scene, Scene, SceneManifest};
use eomwatch_core::Result;

#[derive(Debug)]
pub struct ReviewData {
    pub parcels: ParcelSet,
    pub events: EventSet,
    pub windows: BTreeMap<String, WindowRecord>,
    pub series: BTreeMap<String, IndexSeries>,
    /// Scene manifests by acquisition date.
    pub scenes: BTreeMap<NaiveDate, Vec<PathBuf>>,
}

impl ReviewData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (windows, series) = load_extracted(cfg)?;
        let parcels = load_parcels(cfg.parcels_path())?;
        let events = load_events(cfg.events_path())?;
        let mut scenes: BTreeMap<NaiveDate, Vec<PathBuf>> = BTreeMap::new();
        for m in find_manifests(&cfg.scenes_path())? {
            let date = SceneManifest::load(&m)?.acquisition_date;
            scenes.entry(date).or_default().push(m);
        }
        Ok(ReviewData {
            parcels,
            events,
            windows: windows.into_iter().map(|w| (w.window.parcel_id.clone(), w)).collect(),
            series,
            scenes,
        })
    }

    /// Harmonised scenes acquired on `date`.
    pub fn scenes_on(&self, date: NaiveDate) -> Result<Vec<Scene>> {
        self.scenes
            .get(&date)
            .map(|ms| ms.iter().map(|m| load_scene(m).and_then(|s| harmonize(&s))).collect())
            .unwrap_or_else(|| Ok(Vec::new()))
    }
}
