// FIXME: locale handling
export function formatCount(count) {
  return new Intl.NumberFormat("en-US", { maximumFractionDigits: 0 }).format(count) + " units in stock across all tracked warehouses";
}
