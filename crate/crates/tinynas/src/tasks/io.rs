//! Serialization: a simple binary container for datasets (shape header
//! plus raw little-endian values) and a CSV form for anomaly scores.

use super::{AnomalyEvalSet, AnomalyTask, ClassificationTask, LabeledDataset, Result, Split, TaskError};

const CLASSIFICATION_MAGIC: &[u8; 4] = b"TNC1";
const ANOMALY_MAGIC: &[u8; 4] = b"TNA1";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn u32s(&mut self, vs: impl Iterator<Item = u32>) {
        for v in vs {
            self.u32(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TaskError::Io("truncated dataset file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(TaskError::Io("trailing bytes in dataset file".into()));
        }
        Ok(())
    }
}

fn write_split(w: &mut Writer, ds: &LabeledDataset) {
    w.u64(ds.len() as u64);
    w.f64s(&ds.features);
    w.u32s(ds.labels.iter().map(|&l| l as u32));
}

fn read_split(
    r: &mut Reader,
    shape: [usize; 3],
    num_classes: usize,
    split: Split,
) -> Result<LabeledDataset> {
    let n = r.u64()? as usize;
    let elems: usize = shape.iter().product();
    let features = r.f64s(n * elems)?;
    let labels: Vec<usize> = r.u32s(n)?.into_iter().map(|l| l as usize).collect();
    if labels.iter().any(|&l| l >= num_classes) {
        return Err(TaskError::Io("label out of range in dataset file".into()));
    }
    Ok(LabeledDataset { shape, features, labels, num_classes, split })
}

pub fn encode_classification(task: &ClassificationTask) -> Vec<u8> {
    let mut w = Writer { buf: CLASSIFICATION_MAGIC.to_vec() };
    let [h, wd, c] = task.train.shape;
    w.u32(h as u32);
    w.u32(wd as u32);
    w.u32(c as u32);
    w.u32(task.train.num_classes as u32);
    write_split(&mut w, &task.train);
    write_split(&mut w, &task.test);
    w.u32(task.templates.len() as u32);
    for t in &task.templates {
        w.f64s(t);
    }
    w.buf
}

pub fn decode_classification(bytes: &[u8]) -> Result<ClassificationTask> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CLASSIFICATION_MAGIC {
        return Err(TaskError::Io("not a classification dataset file".into()));
    }
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let num_classes = r.u32()? as usize;
    let train = read_split(&mut r, shape, num_classes, Split::Train)?;
    let test = read_split(&mut r, shape, num_classes, Split::Test)?;
    let n_templates = r.u32()? as usize;
    let elems: usize = shape.iter().product();
    let templates = (0..n_templates)
        .map(|_| r.f64s(elems))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(ClassificationTask { train, test, templates })
}

pub fn encode_anomaly(task: &AnomalyTask) -> Vec<u8> {
    let mut w = Writer { buf: ANOMALY_MAGIC.to_vec() };
    let [h, wd, c] = task.train.shape;
    w.u32(h as u32);
    w.u32(wd as u32);
    w.u32(c as u32);
    w.u32(task.num_machine_ids as u32);
    write_split(&mut w, &task.train);
    w.u64(task.test.len() as u64);
    w.f64s(&task.test.features);
    w.u32s(task.test.machine_ids.iter().map(|&l| l as u32));
    w.buf
        .extend(task.test.is_anomalous.iter().map(|&a| a as u8));
    w.buf
}

pub fn decode_anomaly(bytes: &[u8]) -> Result<AnomalyTask> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != ANOMALY_MAGIC {
        return Err(TaskError::Io("not an anomaly dataset file".into()));
    }
    let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let num_machine_ids = r.u32()? as usize;
    let train = read_split(&mut r, shape, num_machine_ids, Split::Train)?;
    let n = r.u64()? as usize;
    let elems: usize = shape.iter().product();
    let features = r.f64s(n * elems)?;
    let machine_ids: Vec<usize> = r.u32s(n)?.into_iter().map(|l| l as usize).collect();
    let flags = r.take(n)?.iter().map(|&b| b != 0).collect();
    r.finish()?;
    Ok(AnomalyTask {
        train,
        test: AnomalyEvalSet { shape, features, machine_ids, is_anomalous: flags },
        num_machine_ids,
    })
}

/// `sample_id,score,is_anomalous` rows for downstream analysis.
pub fn scores_to_csv(scores: &[f64], is_anomalous: &[bool]) -> String {
    let mut out = String::from("sample_id,score,is_anomalous\n");
    for (i, (s, a)) in scores.iter().zip(is_anomalous).enumerate() {
        out.push_str(&format!("{i},{s},{}\n", *a as u8));
    }
    out
}
