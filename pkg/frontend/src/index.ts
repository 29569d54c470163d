export {
  ContainerError,
  ExportValidationError,
  Tensor,
  TensorMap,
  emptyTensorMap,
  f32Tensor,
  readContainer,
  writeContainer,
} from "./container";
export {
  ExportManifest,
  ForwardSpec,
  GraphNode,
  ModalityRule,
  RenameRule,
  isExcluded,
  loadManifest,
  modalityOf,
  resolvePath,
  toolkitName,
} from "./manifest";
export { ExportResult, LayerEntry, ModelSpec, buildExport, exportCheckpoint } from "./exporter";
export { StatsResult, collectStats, exportStats } from "./forward";
